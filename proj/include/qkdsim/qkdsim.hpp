#pragma once

// Convenience include for the whole library. Individual headers are
// self-contained; pull in only what you need for faster builds.

#include "bloch.hpp"
#include "channel.hpp"
#include "characterization.hpp"
#include "config.hpp"
#include "distillation.hpp"
#include "linalg.hpp"
#include "optimizer.hpp"
#include "protocol.hpp"
#include "reports.hpp"
#include "rng.hpp"
#include "source_model.hpp"
#include "tally.hpp"
