#include <string>
#include <vector>

#include "bidshade/cli.hpp"

int main(int argc, char** argv) {
    return bidshade::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
