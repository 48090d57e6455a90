#pragma once

// Umbrella header.

#include "s4dkit/bench.hpp"
#include "s4dkit/checkpoint.hpp"
#include "s4dkit/checks.hpp"
#include "s4dkit/config.hpp"
#include "s4dkit/conv.hpp"
#include "s4dkit/conv_module.hpp"
#include "s4dkit/encoder.hpp"
#include "s4dkit/s4d.hpp"
#include "s4dkit/scan.hpp"
#include "s4dkit/streaming.hpp"
#include "s4dkit/tape.hpp"
#include "s4dkit/tasks.hpp"
#include "s4dkit/tensor.hpp"
#include "s4dkit/train.hpp"
