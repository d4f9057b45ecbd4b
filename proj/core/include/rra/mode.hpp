#pragma once

namespace rra {

/// Train/eval switch shared by dropout, batchnorm, frame sampling and the
/// forward pass. Eval is the deterministic branch everywhere.
enum class Mode { train, eval };

} // namespace rra
