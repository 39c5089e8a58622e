#pragma once

#include "moshpit/allreduce.hpp"
#include "moshpit/core.hpp"
#include "moshpit/dht.hpp"
#include "moshpit/event_queue.hpp"
#include "moshpit/harness.hpp"
#include "moshpit/matchmaking.hpp"
#include "moshpit/optimizer.hpp"
#include "moshpit/protocols.hpp"
#include "moshpit/rng.hpp"
#include "moshpit/theory.hpp"
