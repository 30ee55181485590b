#include <string>
#include <vector>

#include "trtlab/cli.hpp"

int main(int argc, char ** argv)
{
    const std::vector<std::string> args(argv + 1, argv + argc);
    return trtlab::run_cli(args);
}
