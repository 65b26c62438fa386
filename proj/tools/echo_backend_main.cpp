// Standalone loopback model for `--model exec:...`.

#include <unistd.h>

#include <iostream>

#include "CLI11.hpp"
#include "echo_backend.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Line-protocol echo model: returns the first K pixels as logits"};
  citta::echo::Options opts;
  std::string mode = "echo";
  bool ordered = false;
  app.add_option("--k", opts.k, "Number of logits to return")->check(CLI::Range(2, 1 << 20));
  app.add_option("--mode", mode, "echo | error | malformed | wrong-id")
      ->check(CLI::IsMember({"echo", "error", "malformed", "wrong-id"}));
  app.add_flag("--ordered", ordered, "Answer in request order");
  app.add_option("--seed", opts.seed, "Shuffle seed");
  CLI11_PARSE(app, argc, argv);

  opts.shuffle = !ordered;
  if (mode == "error") opts.mode = citta::echo::Mode::error;
  if (mode == "malformed") opts.mode = citta::echo::Mode::malformed;
  if (mode == "wrong-id") opts.mode = citta::echo::Mode::wrong_id;
  citta::echo::serve(STDIN_FILENO, STDOUT_FILENO, opts);
  return 0;
}
