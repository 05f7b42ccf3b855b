#pragma once

#include "hsja/core.hpp"
#include "hsja/oracle.hpp"
#include "hsja/io.hpp"
#include "hsja/attack.hpp"
#include "hsja/boundary_attack.hpp"
#include "hsja/harness.hpp"
