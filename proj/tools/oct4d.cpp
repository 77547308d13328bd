#include "oct4d/cli.hpp"

int main(int argc, char** argv) { return oct4d::run_cli(argc, argv); }
