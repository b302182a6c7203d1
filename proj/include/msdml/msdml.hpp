#pragma once

#include "msdml/audio.hpp"
#include "msdml/checkpoint.hpp"
#include "msdml/config.hpp"
#include "msdml/dataset.hpp"
#include "msdml/error.hpp"
#include "msdml/eval.hpp"
#include "msdml/features.hpp"
#include "msdml/head.hpp"
#include "msdml/io.hpp"
#include "msdml/metric.hpp"
#include "msdml/msnet.hpp"
#include "msdml/nn.hpp"
#include "msdml/openset.hpp"
#include "msdml/optim.hpp"
#include "msdml/store.hpp"
#include "msdml/trainer.hpp"
