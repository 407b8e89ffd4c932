#include <sdlto/cli_io.hpp>

#include <cstdio>
#include <iostream>

int main (int argc, char** argv)
{
    using namespace sdlto;
    try {
        auto const cmd = parse_command_line(std::vector<std::string>(argv, argv + argc));
        if (!cmd.settings) {
            (cmd.exit_code == 0 ? std::cout : std::cerr) << cmd.message;
            return cmd.exit_code;
        }
        auto const& s = *cmd.settings;
        auto const result = run_and_write(s);
        auto const& m = result.manifest;
        std::printf("%s %s %dx%d: objective %.6g -> %.6g, fem solves %ld (critical path %ld), "
                    "learning %d, online %d, simulated %d -> %s\n",
                    to_string(s.preset), to_string(s.mode), s.nelx, s.nely, m.initial_objective,
                    m.final_objective, m.fem_solves, m.critical_path_fem, m.learning_steps, m.online_steps,
                    m.simulated_steps, s.out_dir.c_str());
        return 0;
    }
    catch (ParseError const& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    catch (std::exception const& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
