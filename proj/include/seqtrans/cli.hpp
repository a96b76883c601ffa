#pragma once

namespace seqtrans::cli {

// exit codes: 0 success, 1 check failure (gradcheck), 2 input/usage error
int run(int argc, const char* const* argv);

}  // namespace seqtrans::cli
