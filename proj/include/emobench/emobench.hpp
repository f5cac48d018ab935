#pragma once

#include "emobench/error.hpp"
#include "emobench/distributions.hpp"
#include "emobench/labels.hpp"
#include "emobench/parsing.hpp"
#include "emobench/prompts.hpp"
#include "emobench/metrics.hpp"
#include "emobench/digest.hpp"
#include "emobench/backends.hpp"
#include "emobench/tts.hpp"
#include "emobench/harness/config.hpp"
#include "emobench/harness/cache.hpp"
#include "emobench/harness/report.hpp"
#include "emobench/harness/commands.hpp"
