#include <string>
#include <vector>

#include "bolt/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return bolt::run(args);
}
