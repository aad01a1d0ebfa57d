#pragma once

#include "keap/checkpoint.hpp"
#include "keap/config.hpp"
#include "keap/data.hpp"
#include "keap/errors.hpp"
#include "keap/gradcheck.hpp"
#include "keap/masking.hpp"
#include "keap/metrics.hpp"
#include "keap/model.hpp"
#include "keap/probes.hpp"
#include "keap/rng.hpp"
#include "keap/tensor.hpp"
#include "keap/train.hpp"
#include "keap/vocab.hpp"
