#pragma once

#include "ctap/actionness.hpp"
#include "ctap/adam.hpp"
#include "ctap/checkpoint.hpp"
#include "ctap/config.hpp"
#include "ctap/core.hpp"
#include "ctap/data_io.hpp"
#include "ctap/error.hpp"
#include "ctap/eval.hpp"
#include "ctap/features.hpp"
#include "ctap/initial_proposals.hpp"
#include "ctap/nn.hpp"
#include "ctap/pate.hpp"
#include "ctap/pipeline.hpp"
#include "ctap/rng.hpp"
#include "ctap/tar.hpp"
#include "ctap/training.hpp"
