#pragma once

#include "covtune/boot_frobenius.hpp"
#include "covtune/boot_operator.hpp"
#include "covtune/csv.hpp"
#include "covtune/eigen.hpp"
#include "covtune/error.hpp"
#include "covtune/estimators.hpp"
#include "covtune/matrix.hpp"
#include "covtune/models.hpp"
#include "covtune/mvn.hpp"
#include "covtune/rng.hpp"
#include "covtune/selection.hpp"
#include "covtune/study.hpp"
