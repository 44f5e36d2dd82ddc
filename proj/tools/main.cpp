#include "miltremor/cli.hpp"

int main(int argc, char** argv) { return miltremor::cli::run(argc, argv); }
