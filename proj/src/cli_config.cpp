#include "featdistill/cli_config.hpp"

#include <algorithm>
#include <istream>

namespace featdistill::cli {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string scalar_text(const ordered_json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
    return j.dump();
}

bool is_subcommand(const CLI::App* root, const std::string& name) {
    if (root == nullptr) return false;
    for (const CLI::App* sub : root->get_subcommands([](const CLI::App*) { return true; })) {
        if (sub->get_name() == name) return true;
    }
    return false;
}

void collect(const ordered_json& object, const std::vector<std::string>& parents, const CLI::App* root,
             std::vector<CLI::ConfigItem>& items) {
    for (auto it = object.begin(); it != object.end(); ++it) {
        const ordered_json& value = it.value();
        if (value.is_null()) continue;
        if (value.is_object()) {
            if (parents.empty() && is_subcommand(root, it.key())) collect(value, {it.key()}, root, items);
            continue;
        }
        CLI::ConfigItem item;
        item.parents = parents;
        item.name = it.key();
        std::replace(item.name.begin(), item.name.end(), '_', '-');
        if (value.is_array()) {
            for (const auto& element : value) {
                if (element.is_structured()) {
                    item.inputs.clear();
                    break;
                }
                item.inputs.push_back(scalar_text(element));
            }
            if (item.inputs.empty()) continue;
        } else {
            item.inputs.push_back(scalar_text(value));
        }
        items.push_back(std::move(item));
    }
}

}  // namespace

std::vector<CLI::ConfigItem> JsonConfig::from_config(std::istream& input) const {
    ordered_json j;
    try {
        j = ordered_json::parse(input);
    } catch (const nlohmann::json::parse_error& e) {
        throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");

    std::vector<CLI::ConfigItem> items;
    if (j.contains("subcommand") && j["subcommand"].is_string() && j.contains("config") && j["config"].is_object()) {
        collect(j["config"], {j["subcommand"].get<std::string>()}, root_, items);
        return items;
    }

    std::vector<std::string> active;
    if (root_ != nullptr) {
        const auto selected = root_->get_subcommands();
        if (!selected.empty()) active.push_back(selected.front()->get_name());
    }
    // Flat keys target the selected subcommand; nested subcommand objects are
    // handled inside collect.
    for (auto it = j.begin(); it != j.end(); ++it) {
        ordered_json single = ordered_json::object();
        single[it.key()] = it.value();
        if (it.value().is_object()) {
            collect(single, {}, root_, items);
        } else {
            collect(single, active, root_, items);
        }
    }
    return items;
}

std::string JsonConfig::to_config(const CLI::App* app, bool, bool, std::string) const {
    ordered_json j = resolved_options(*app);
    for (const CLI::App* sub : app->get_subcommands()) j[sub->get_name()] = resolved_options(*sub);
    return j.dump(2);
}

ordered_json resolved_options(const CLI::App& app) {
    ordered_json j = ordered_json::object();
    for (const CLI::Option* opt : app.get_options()) {
        if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
        const std::string& name = opt->get_lnames().front();
        if (name == "help" || name == "config") continue;
        if (opt->get_type_size() == 0) {
            j[name] = opt->count() > 0;
            continue;
        }
        const bool multi = opt->get_items_expected_max() > 1;
        if (opt->count() > 0) {
            const auto& results = opt->results();
            if (multi) {
                j[name] = results;
            } else {
                j[name] = results.back();
            }
        } else if (!opt->get_default_str().empty()) {
            j[name] = opt->get_default_str();
        } else if (multi) {
            j[name] = ordered_json::array();
        } else {
            j[name] = "";
        }
    }
    return j;
}

}  // namespace featdistill::cli
