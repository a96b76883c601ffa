#include "seqtrans/cli.hpp"

int main(int argc, char** argv) { return seqtrans::cli::run(argc, argv); }
