#pragma once

// torch's logging header claims CHECK; the tests want doctest's.
#undef CHECK
#include <doctest.h>
