#pragma once

#include "dsopf/error.hpp"
#include "dsopf/case_model.hpp"
#include "dsopf/powerflow.hpp"
#include "dsopf/nlp.hpp"
#include "dsopf/scenarios.hpp"
#include "dsopf/acopf.hpp"
#include "dsopf/admm.hpp"
#include "dsopf/reliability.hpp"
#include "dsopf/io.hpp"
#include "dsopf/pipeline.hpp"
