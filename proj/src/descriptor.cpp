#include "stepfit/descriptor.hpp"

#include <algorithm>

#include <json.hpp>

#include "stepfit/errors.hpp"

namespace stepfit {

using nlohmann::json;

std::string family_name(Family family) {
    switch (family) {
        case Family::binary: return "binary";
        case Family::categorical: return "categorical";
        case Family::gaussian_unit: return "gaussian_unit";
        case Family::gaussian_spherical: return "gaussian_spherical";
        case Family::gaussian_diag: return "gaussian_diag";
        case Family::gaussian_full: return "gaussian_full";
        case Family::covariate: return "covariate";
    }
    throw ValidationError("unknown family tag");
}

Family family_from_name(const std::string& name) {
    if (name == "binary") return Family::binary;
    if (name == "categorical") return Family::categorical;
    if (name == "gaussian_unit") return Family::gaussian_unit;
    if (name == "gaussian_spherical") return Family::gaussian_spherical;
    if (name == "gaussian_diag") return Family::gaussian_diag;
    if (name == "gaussian_full") return Family::gaussian_full;
    if (name == "covariate") return Family::covariate;
    throw ValidationError("unknown emission family '" + name + "'");
}

bool family_supports_fiml(Family family) {
    return family != Family::gaussian_full && family != Family::covariate;
}

bool ModelDescriptor::has_covariate() const { return covariate_index() >= 0; }

int ModelDescriptor::covariate_index() const {
    for (std::size_t b = 0; b < blocks.size(); ++b)
        if (blocks[b].family == Family::covariate) return static_cast<int>(b);
    return -1;
}

void validate_descriptor(const ModelDescriptor& desc, const Dataset& data, DescriptorRole role) {
    const long d = data.n_cols();
    if (desc.blocks.empty()) throw ValidationError("descriptor has no blocks");
    std::vector<int> owner(static_cast<std::size_t>(d), -1);
    int n_covariate = 0;
    for (std::size_t b = 0; b < desc.blocks.size(); ++b) {
        const BlockSpec& block = desc.blocks[b];
        if (block.col_begin < 0 || block.col_end > d || block.col_begin >= block.col_end)
            throw ValidationError("block '" + block.name + "': column range [" +
                                  std::to_string(block.col_begin) + ", " +
                                  std::to_string(block.col_end) + ") invalid for " +
                                  std::to_string(d) + " columns");
        for (int j = block.col_begin; j < block.col_end; ++j) {
            if (owner[static_cast<std::size_t>(j)] >= 0)
                throw ValidationError("column " + std::to_string(j) + " claimed by both block '" +
                                      desc.blocks[static_cast<std::size_t>(owner[static_cast<std::size_t>(j)])].name +
                                      "' and block '" + block.name + "'");
            owner[static_cast<std::size_t>(j)] = static_cast<int>(b);
        }
        if (block.family == Family::covariate) {
            ++n_covariate;
            if (role == DescriptorRole::measurement)
                throw ValidationError("block '" + block.name +
                                      "': covariate blocks are not allowed in the measurement model");
        }
        if (block.fiml && !family_supports_fiml(block.family))
            throw ValidationError("block '" + block.name + "': FIML unsupported for " +
                                  family_name(block.family));
        if (block.n_levels && *block.n_levels < 1)
            throw ValidationError("block '" + block.name + "': n_levels must be >= 1");
    }
    if (n_covariate > 1) throw ValidationError("at most one covariate block is allowed");
    for (long j = 0; j < d; ++j)
        if (owner[static_cast<std::size_t>(j)] < 0)
            throw ValidationError("column " + std::to_string(j) + " is not covered by any block");
}

namespace {

BlockSpec block_from_json(const json& j, int index) {
    BlockSpec block;
    block.name = j.value("name", "block" + std::to_string(index));
    std::string fam = j.at("family").get<std::string>();
    if (fam.size() > 4 && fam.ends_with("_nan")) {
        block.fiml = true;
        fam = fam.substr(0, fam.size() - 4);
    }
    block.family = family_from_name(fam);
    const auto& cols = j.at("columns");
    if (!cols.is_array() || cols.size() != 2)
        throw ParseError("block '" + block.name + "': \"columns\" must be [begin, end)");
    block.col_begin = cols[0].get<int>();
    block.col_end = cols[1].get<int>();
    if (j.contains("fiml")) block.fiml = j["fiml"].get<bool>();
    if (j.contains("options")) {
        const json& opts = j["options"];
        if (opts.contains("method")) {
            const std::string m = opts["method"].get<std::string>();
            if (m == "newton" || m == "newton-raphson")
                block.solver.method = SolverOptions::Method::newton;
            else if (m == "gradient")
                block.solver.method = SolverOptions::Method::gradient;
            else
                throw ParseError("block '" + block.name + "': unknown solver method '" + m + "'");
        }
        if (opts.contains("max_iter")) block.solver.max_iter = opts["max_iter"].get<int>();
        if (opts.contains("step_size")) block.solver.step_size = opts["step_size"].get<double>();
        if (opts.contains("tol")) block.solver.tol = opts["tol"].get<double>();
        if (opts.contains("n_levels")) block.n_levels = opts["n_levels"].get<int>();
    }
    return block;
}

}  // namespace

ModelDescriptor parse_descriptor(const std::string& text, int n_cols) {
    ModelDescriptor desc;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw ParseError(std::string("descriptor JSON: ") + e.what());
        }
        if (!j.contains("blocks") || !j["blocks"].is_array())
            throw ParseError("descriptor JSON must contain a \"blocks\" array");
        int index = 0;
        for (const auto& jb : j["blocks"]) desc.blocks.push_back(block_from_json(jb, index++));
        return desc;
    }
    // Shorthand: one family string covering every column.
    BlockSpec block;
    block.name = text;
    std::string fam = text;
    if (fam.size() > 4 && fam.ends_with("_nan")) {
        block.fiml = true;
        fam = fam.substr(0, fam.size() - 4);
        block.name = fam;
    }
    block.family = family_from_name(fam);
    block.col_begin = 0;
    block.col_end = n_cols;
    desc.blocks.push_back(block);
    return desc;
}

std::string descriptor_to_json(const ModelDescriptor& desc) {
    json blocks = json::array();
    for (const BlockSpec& block : desc.blocks) {
        json j{{"name", block.name},
               {"family", family_name(block.family)},
               {"columns", {block.col_begin, block.col_end}},
               {"fiml", block.fiml}};
        json opts = json::object();
        if (block.family == Family::covariate) {
            opts["method"] =
                block.solver.method == SolverOptions::Method::newton ? "newton" : "gradient";
            opts["max_iter"] = block.solver.max_iter;
            opts["step_size"] = block.solver.step_size;
            opts["tol"] = block.solver.tol;
        }
        if (block.n_levels) opts["n_levels"] = *block.n_levels;
        if (!opts.empty()) j["options"] = opts;
        blocks.push_back(std::move(j));
    }
    return json{{"blocks", std::move(blocks)}}.dump();
}

}  // namespace stepfit
