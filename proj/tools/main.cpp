#include <jbot/cli.hpp>

int main(int argc, char** argv) { return jbot::run_cli(argc, argv); }
