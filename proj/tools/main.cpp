#include "tdro/cli.hpp"

int main(int argc, char** argv) { return tdro::run_cli(argc, argv); }
