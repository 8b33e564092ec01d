#pragma once

// Everything except the network pieces (remote_http.hpp, service.hpp).

#include "semcache/common.hpp"
#include "semcache/element.hpp"
#include "semcache/embedder.hpp"
#include "semcache/vector_index.hpp"
#include "semcache/judge.hpp"
#include "semcache/recalibration.hpp"
#include "semcache/cache_engine.hpp"
#include "semcache/prefetcher.hpp"
#include "semcache/remote_client.hpp"
#include "semcache/proxy.hpp"
#include "semcache/workload.hpp"
#include "semcache/replay.hpp"
#include "semcache/coloc_sim.hpp"
