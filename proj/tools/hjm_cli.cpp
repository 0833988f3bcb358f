#include "hjm/cli.hpp"

int main(int argc, char** argv) { return hjm::cli::run(argc, argv); }
