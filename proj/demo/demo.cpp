// Runs one scenario through the library API and prints the error norm of
// every tenth control step, then replays attempt 1 from its trace.

#include <iostream>

#include "salvs/episode.hpp"
#include "salvs/scenario_io.hpp"
#include "salvs/trace_io.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: salvs_demo <scenario.json> [seed]\n";
    return 2;
  }
  try {
    const salvs::Scenario scenario = salvs::load_scenario_file(argv[1]);
    const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : scenario.seed;
    salvs::ControllerConfig cfg;

    const auto trace = salvs::run_task(scenario, seed, cfg, [&](const salvs::TraceRecord& r) {
      if (r.servo.iteration % 10 == 0) {
        std::cout << "attempt " << r.attempt << " stage " << scenario.stages[r.stage].name << " iter "
                  << r.servo.iteration << "  |e| = " << r.servo.e_norm << "\n";
      }
    });
    std::cout << salvs::outcome_line(salvs::summarize(scenario, seed, trace)) << "\n";

    std::vector<salvs::TraceRecord> first;
    for (const auto& r : trace.records)
      if (r.attempt == 1) first.push_back(r);
    const auto replay = salvs::replay_attempt(scenario, seed, first);
    std::cout << "replay of attempt 1: " << (replay.bit_identical ? "bit-identical" : "MISMATCH") << "\n";
    return replay.bit_identical ? 0 : 1;
  } catch (const salvs::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
