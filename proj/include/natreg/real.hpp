#pragma once

// Scalar type selection. The default build uses 32-bit floats; the gradient
// oracle build compiles the same sources with NATREG_REAL=double so that
// central differences resolve small gradients. The inline namespace keeps
// both builds link-compatible inside one binary.

#ifndef NATREG_REAL
#define NATREG_REAL float
#define NATREG_PRECISION_NS f32
#endif

#ifndef NATREG_PRECISION_NS
#error "NATREG_PRECISION_NS must be defined together with NATREG_REAL"
#endif

#define NATREG_NAMESPACE_BEGIN \
  namespace natreg {           \
  inline namespace NATREG_PRECISION_NS {
#define NATREG_NAMESPACE_END \
  }                          \
  }

NATREG_NAMESPACE_BEGIN

using real = NATREG_REAL;

NATREG_NAMESPACE_END
