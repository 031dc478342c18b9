#pragma once

// Runs the rmdl executable in a working directory and snapshots directory trees
// byte for byte.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rmdl/io/files.hpp"

#ifndef RMDL_CLI_PATH
#error "RMDL_CLI_PATH must name the rmdl executable"
#endif

namespace rmdl::test {

namespace fs = std::filesystem;

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

struct CliRun {
  int exit_code = -1;
  std::string stdout_text;
  std::string stderr_text;
};

/// Runs `rmdl args...` with `cwd` as working directory, capturing both streams.
inline CliRun run_cli(const fs::path& cwd, const std::vector<std::string>& args) {
  fs::create_directories(cwd);
  const fs::path out = cwd / ".stdout", err = cwd / ".stderr";
  std::string cmd = "cd " + shell_quote(cwd.string()) + " && " + shell_quote(RMDL_CLI_PATH);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " >" + shell_quote(out.string()) + " 2>" + shell_quote(err.string());
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.stdout_text = read_file(out);
  r.stderr_text = read_file(err);
  fs::remove(out);
  fs::remove(err);
  return r;
}

/// Relative path -> file bytes for every regular file under `root`.
inline std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
  return files;
}

/// The full command sequence on a small dataset; returns the stdout of every step.
inline std::vector<CliRun> run_small_pipeline(const fs::path& cwd, unsigned threads = 1) {
  const std::string t = std::to_string(threads);
  const std::vector<std::vector<std::string>> steps{
      {"generate", "--out", "data", "--slides", "24", "--seed", "5", "--threads", t},
      {"train-scorer", "--data", "data", "--threads", t},
      {"select", "--data", "data", "--m-prime", "10", "--threads", t},
      {"train", "--data", "data", "--out", "rmdl", "--iters", "30", "--batch", "8", "--lr", "1e-2", "--threads", t},
      {"train", "--data", "data", "--out", "mean", "--head", "mean", "--iters", "30", "--batch", "8", "--threads", t},
      {"eval", "--model", "rmdl/model.json", "--bags", "data", "--out", "eval_rmdl", "--threads", t},
      {"eval", "--model", "mean/model.json", "--bags", "data", "--out", "eval_mean", "--threads", t},
      {"report", "eval_rmdl", "eval_mean", "--out", "table.md"},
  };
  std::vector<CliRun> runs;
  for (const auto& s : steps) {
    runs.push_back(run_cli(cwd, s));
    if (runs.back().exit_code != 0) break;
  }
  return runs;
}

}  // namespace rmdl::test
