#include "fraclqr/cli.hpp"

int main(int argc, char** argv) { return fraclqr::cli::run(argc, argv); }
