#ifndef MCOVER_MCOVER_HPP
#define MCOVER_MCOVER_HPP

#include "mcover/dataset.hpp"
#include "mcover/encoder.hpp"
#include "mcover/error.hpp"
#include "mcover/frontend.hpp"
#include "mcover/metrics.hpp"
#include "mcover/preprocess.hpp"
#include "mcover/store.hpp"
#include "mcover/synthetic.hpp"
#include "mcover/training.hpp"
#include "mcover/triplet.hpp"

#endif  // MCOVER_MCOVER_HPP
