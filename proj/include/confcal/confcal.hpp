#pragma once

#include "confcal/error.hpp"
#include "confcal/confidence.hpp"
#include "confcal/metrics.hpp"
#include "confcal/completion.hpp"
#include "confcal/cache.hpp"
#include "confcal/backend.hpp"
#include "confcal/http_backend.hpp"
#include "confcal/client.hpp"
#include "confcal/parallel.hpp"
#include "confcal/harness.hpp"
#include "confcal/report_io.hpp"
#include "confcal/adaptive_rag.hpp"
#include "confcal/sandbox.hpp"
#include "confcal/config.hpp"
#include "confcal/commands.hpp"
