"""Tape opcodes and kernel status codes shared by both backends."""

CONST = 0
VAR = 1
ADD = 2
SUB = 3
MUL = 4
DIV = 5
NEG = 6
POWI = 7  # non-negative integer exponent, by repeated squaring
POWC = 8  # other constant exponent
POW = 9  # exp(b * log(a))
SIN = 10
COS = 11
EXP = 12
LOG = 13
SQRT = 14

OK = 0
ERR_SQRT = 1
ERR_LOG = 2
ERR_DIV = 3
ERR_POW = 4
ERR_SINGULAR = 5
ERR_SLIT = 6

STATUS_TEXT = {
    ERR_SQRT: "sqrt of negative argument (or of zero with derivatives requested)",
    ERR_LOG: "log of non-positive argument",
    ERR_DIV: "division by zero",
    ERR_POW: "power of non-positive base with non-integer exponent",
    ERR_SINGULAR: "singular metric",
    ERR_SLIT: "slit-guard breach (|u| below u_min)",
}

# LU pivots below this fraction of max|g| count as singular.
PIVOT_RTOL = 1e-14
