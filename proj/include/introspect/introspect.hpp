#pragma once

#include "introspect/raster.hpp"
#include "introspect/featurizer.hpp"
#include "introspect/classifier.hpp"
#include "introspect/cam.hpp"
#include "introspect/explorer.hpp"
#include "introspect/trainkit.hpp"
#include "introspect/eval.hpp"
