#pragma once

#include <string>

#include <json.hpp>

#include "faultfree/baseband_sim.hpp"
#include "faultfree/comp_program.hpp"
#include "faultfree/device_model.hpp"
#include "faultfree/factorizer.hpp"
#include "faultfree/harness.hpp"
#include "json_util.hpp"

// Path-aware readers shared by the public from_json entry points and the
// experiment configs, so errors name the offending key.
namespace faultfree::detail {

CrossbarSpec parse_crossbar(const nlohmann::json& j, const std::string& path, CrossbarSpec base = {});
OptimizerConfig parse_optimizer(const nlohmann::json& j, const std::string& path,
                                OptimizerConfig base = {});
ProgramPlan parse_plan(const nlohmann::json& j, const std::string& path, ProgramPlan base = {});
LinkSpec parse_link(const nlohmann::json& j, const std::string& path, LinkSpec base = {});
ReceiverChip parse_chip(const nlohmann::json& j, const std::string& path, ReceiverChip base);
ChannelSpec parse_channel(const nlohmann::json& j, const std::string& path, ChannelSpec base = {});
// Sweep keys shared by SweepConfig and the sweep experiment (no threads/output).
void read_sweep_fields(Fields& f, SweepConfig& c);

}  // namespace faultfree::detail
