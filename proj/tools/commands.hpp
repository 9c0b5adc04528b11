#ifndef CHARBENCH_COMMANDS_HPP
#define CHARBENCH_COMMANDS_HPP

#include "charbench/report.hpp"
#include "cli_config.hpp"

namespace charbench::cli {

// One function per subcommand. Usage problems throw UsageError (exit 2);
// runtime failures throw (exit 1) or return 1 for recorded per-model
// failures.

int cmd_synth(const Config& cfg);
int cmd_pretrain(const Config& cfg);
int cmd_transfer(const Config& cfg);
int cmd_benchmark(const Config& cfg);
int cmd_audit(const Config& cfg, ReportFormat format, bool inject_fault);
int cmd_gradcheck(double tolerance, const std::string& op_filter, int seeds);

} // namespace charbench::cli

#endif
