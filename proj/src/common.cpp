#include "dpr/common.hpp"

namespace dpr {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidRange: return "invalid range";
        case ErrorKind::InvalidSpec: return "invalid spec";
        case ErrorKind::InvalidThreshold: return "invalid threshold";
        case ErrorKind::InvalidGeometry: return "invalid geometry";
        case ErrorKind::ShapeMismatch: return "shape mismatch";
        case ErrorKind::Schema: return "schema error";
        case ErrorKind::Io: return "i/o error";
        case ErrorKind::Config: return "config error";
        case ErrorKind::NonFinite: return "non-finite value";
    }
    return "error";
}

}  // namespace dpr
