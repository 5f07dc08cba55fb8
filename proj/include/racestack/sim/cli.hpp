#pragma once

// Command-line front end shared by the `racestack` and `tslcat` binaries.
// Exit codes: 0 success, 1 assertion failure or damaged log, 2 usage or input
// error, 3 runtime failure (port in use, I/O).

#include <iosfwd>

#include "racestack/signal_log.hpp"

namespace racestack::sim {

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);
int tslcat_main(int argc, char** argv, std::ostream& out, std::ostream& err);

// CSV of every signal frame: a "stamp_ns,<names>" header whenever the schema
// changes, values printed with %.17g. With schemas_only, one line per schema.
// Throws TslError on terminal damage after printing everything before it.
void write_csv(tsl::LogReader& reader, std::ostream& out, bool schemas_only = false);

}  // namespace racestack::sim
