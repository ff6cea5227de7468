#pragma once

#include "dflat/attention.hpp"
#include "dflat/checkpoint.hpp"
#include "dflat/complexity.hpp"
#include "dflat/config.hpp"
#include "dflat/data.hpp"
#include "dflat/errors.hpp"
#include "dflat/flatten.hpp"
#include "dflat/gradcheck.hpp"
#include "dflat/metrics.hpp"
#include "dflat/model.hpp"
#include "dflat/rng.hpp"
#include "dflat/store.hpp"
#include "dflat/tape.hpp"
#include "dflat/tensor.hpp"
#include "dflat/train.hpp"
