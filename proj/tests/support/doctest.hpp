#pragma once

// torch's precompiled header brings in a glog-style CHECK
#ifdef CHECK
#undef CHECK
#endif
#include <doctest.h>
