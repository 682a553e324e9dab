#pragma once

#include "kronfisher/commands.hpp"
#include "kronfisher/config.hpp"
#include "kronfisher/data.hpp"
#include "kronfisher/diagnostics.hpp"
#include "kronfisher/dist.hpp"
#include "kronfisher/io.hpp"
#include "kronfisher/kfactor.hpp"
#include "kronfisher/linalg.hpp"
#include "kronfisher/log.hpp"
#include "kronfisher/optim.hpp"
#include "kronfisher/trainer.hpp"
