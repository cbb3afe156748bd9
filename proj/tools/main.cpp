#include "lidarcount/cli.hpp"

int main(int argc, char** argv) { return lidarcount::run_command(argc, argv); }
