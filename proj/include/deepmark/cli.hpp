#pragma once

// Placeholder during bring-up; the real dispatcher lands with the CLI module.

namespace deepmark {

int run_cli(int argc, char** argv);

inline int run_cli(int, char**) { return 0; }

}  // namespace deepmark
