// Prints the one-cycle learning-rate and momentum trace for 500 iterations,
// followed by the per-group plan used for gradual unfreezing.

#include <iostream>

#include "smalldata/sched.hpp"

using namespace smalldata;

int main(int argc, char** argv) {
  const std::size_t max_iter = argc > 1 ? std::stoul(argv[1]) : 500;
  const double max_lr = argc > 2 ? std::stod(argv[2]) : 0.01;
  const auto plan = sched::make_one_cycle(max_lr, max_iter);
  std::cout << "cut at iteration " << sched::one_cycle_cut(max_iter) << "\n\niteration  lr          momentum\n";
  for (std::size_t i = 0; i <= max_iter; i += max_iter / 20 ? max_iter / 20 : 1)
    std::cout << i << "\t   " << sched::one_cycle_lr(i, plan) << "\t" << sched::one_cycle_momentum(i, plan) << '\n';
  std::cout << '\n';
  sched::write_schedule_csv(std::cout, sched::make_group_plan(plan));
}
