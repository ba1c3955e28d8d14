#pragma once

#include "nodelearn/checkpoint.hpp"
#include "nodelearn/coalition.hpp"
#include "nodelearn/config.hpp"
#include "nodelearn/context.hpp"
#include "nodelearn/csv.hpp"
#include "nodelearn/datagen.hpp"
#include "nodelearn/engine.hpp"
#include "nodelearn/errors.hpp"
#include "nodelearn/exchange.hpp"
#include "nodelearn/io.hpp"
#include "nodelearn/metrics.hpp"
#include "nodelearn/model.hpp"
#include "nodelearn/network.hpp"
#include "nodelearn/node.hpp"
#include "nodelearn/resources.hpp"
#include "nodelearn/rng.hpp"
#include "nodelearn/types.hpp"
