#include "commands.hpp"

int main(int argc, char** argv) { return darc::cli::run(std::vector<std::string>(argv, argv + argc)); }
