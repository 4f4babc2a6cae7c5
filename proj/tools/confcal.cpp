#include "confcal/cli.hpp"

int main(int argc, char** argv) { return confcal::cli::run(argc, argv); }
