#pragma once

#include "common/fixtures.hpp"

#include <doctest.h>
