#ifndef STEINGP_STEINGP_HPP
#define STEINGP_STEINGP_HPP

#include "steingp/data.hpp"
#include "steingp/errors.hpp"
#include "steingp/kernels.hpp"
#include "steingp/linalg.hpp"
#include "steingp/models.hpp"
#include "steingp/params.hpp"
#include "steingp/predict.hpp"
#include "steingp/svgd.hpp"

#endif // STEINGP_STEINGP_HPP
