#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/quadrature.hpp"
#include "heatsampler/geometry.hpp"
#include "heatsampler/interior_mesh.hpp"
#include "heatsampler/kernel.hpp"
#include "heatsampler/norms.hpp"
#include "heatsampler/fields.hpp"
#include "heatsampler/parallel.hpp"
#include "heatsampler/forward.hpp"
#include "heatsampler/linalg.hpp"
#include "heatsampler/potentials.hpp"
#include "heatsampler/sampling.hpp"
#include "heatsampler/diagnostics.hpp"
#include "heatsampler/io.hpp"
#include "heatsampler/pipeline.hpp"
