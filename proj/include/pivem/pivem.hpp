#pragma once

#include "pivem/rng.hpp"
#include "pivem/special.hpp"
#include "pivem/temporal_graph.hpp"
#include "pivem/latent_model.hpp"
#include "pivem/gp_prior.hpp"
#include "pivem/adam.hpp"
#include "pivem/trainer.hpp"
#include "pivem/sampler.hpp"
#include "pivem/evaluation.hpp"
