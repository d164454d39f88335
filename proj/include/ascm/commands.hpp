#pragma once

#include <iosfwd>
#include <vector>

#include "ascm/config.hpp"

namespace ascm {

/// Synthetic or list-file pairs, as selected by the configuration.
std::vector<CorrespondencePair> load_training_pairs(const RunConfig& config, bool validation);

/// Writes <out>/loss.csv, <out>/model.ascm and periodic <out>/checkpoint_<iter>.ascm.
void cmd_train(const RunConfig& config, std::ostream& log);
/// Writes the filled flow to `out` and the consistency-filtered flow next to it
/// with a "_filtered" suffix.
void cmd_flow(const RunConfig& config, std::ostream& log);
/// CSV with columns epe_all,n_all,epe_masked,n_masked.
void cmd_eval_flow(const RunConfig& config, std::ostream& out);
/// CSV with columns alpha,pck,visible.
void cmd_eval_pck(const RunConfig& config, std::ostream& out);
void cmd_attention(const RunConfig& config, std::ostream& log);
/// Writes <out>/source.pgm, <out>/target.pgm and <out>/flow.flo.
void cmd_synth(const RunConfig& config, std::ostream& log);
/// CSV index,row,col,score for every window candidate, then the best match.
void cmd_match(const RunConfig& config, std::ostream& out);

}  // namespace ascm
