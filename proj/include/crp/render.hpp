#pragma once

// Results rendering. Effects are reported as the percentage change in the
// cluster rate per unit of the variable, "point (lo,hi)" at two significant
// figures with 90% intervals. Ineligible cells and failed fits both render NA
// but carry different footnote codes, so a reader can tell a variable that is
// out of scope for an industry from a model that could not be fitted.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "crp/csv.hpp"
#include "crp/study.hpp"

namespace crp {

inline std::string format_sig2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2g", v);
  return buf;
}

inline std::string format_sig3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

inline std::string format_fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// 1149007 -> "1,149,007"
inline std::string format_grouped(long long v) {
  std::string digits = std::to_string(v < 0 ? -v : v);
  std::string out;
  const std::size_t n = digits.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && (n - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return v < 0 ? "-" + out : out;
}

inline std::string format_effect_cell(const FitTerm& t) {
  return format_sig2(t.pct) + " (" + format_sig2(t.pct_lo) + "," + format_sig2(t.pct_hi) + ")";
}

inline constexpr const char* kNaIneligible = "NA (a)";
inline constexpr const char* kNaNoFit = "NA (b)";
inline constexpr const char* kFootnoteIneligible =
    "NA (a): variable not considered for this industry";
inline constexpr const char* kFootnoteNoFit = "NA (b): no model could be fitted";

// Tables are built as plain string grids (first row = header) and serialized
// by a writer per output format, so the CSV and markdown renderings of a table
// can never drift apart.
using TextGrid = std::vector<std::vector<std::string>>;

inline void write_grid_csv(const std::string& path, const TextGrid& grid) {
  CsvWriter out(path);
  for (const std::vector<std::string>& row : grid) {
    for (const std::string& cell : row) out.field(cell);
    out.end_row();
  }
  out.commit();
}

inline void write_grid_md(const std::string& path, const TextGrid& grid) {
  std::string text;
  auto emit = [&text](const std::vector<std::string>& row) {
    text += '|';
    for (const std::string& cell : row) {
      text += ' ';
      for (char c : cell) {
        if (c == '|') text += '\\';
        text += c;
      }
      text += " |";
    }
    text += '\n';
  };
  for (std::size_t r = 0; r < grid.size(); ++r) {
    emit(grid[r]);
    if (r == 0) {
      text += '|';
      for (std::size_t c = 0; c < grid[0].size(); ++c) text += " --- |";
      text += '\n';
    }
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::MissingFile, "cannot open for write: " + tmp);
    out << text;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error(ErrorKind::MissingFile, "cannot rename " + tmp + " to " + path);
}

namespace detail {

inline TextGrid table2_grid(const Table2& t) {
  TextGrid grid;
  std::vector<std::string> header = {"Variable"};
  for (Sector s : t.industries) header.push_back(to_string(s));
  grid.push_back(std::move(header));

  std::string open_section;
  for (const Table2::Row& row : t.rows) {
    if (row.section != open_section) {
      open_section = row.section;
      std::vector<std::string> heading(t.industries.size() + 1);
      heading[0] = open_section;
      grid.push_back(std::move(heading));
    }
    std::vector<std::string> cells = {row.label};
    for (double v : row.values) {
      switch (row.kind) {
        case Table2::Kind::Count: cells.push_back(format_grouped(static_cast<long long>(v))); break;
        case Table2::Kind::Score: cells.push_back(format_sig2(v)); break;
        case Table2::Kind::Percent: cells.push_back(format_sig3(v) + "%"); break;
        case Table2::Kind::Rate: cells.push_back(format_sig2(v)); break;
        case Table2::Kind::LogRate: cells.push_back(format_fixed2(v)); break;
        case Table2::Kind::ModalClass:
          cells.push_back(to_string(static_cast<MobilityClass>(static_cast<int>(v))));
          break;
        case Table2::Kind::ModalQuintile:
          cells.push_back(std::to_string(static_cast<int>(v)));
          break;
      }
    }
    grid.push_back(std::move(cells));
  }
  return grid;
}

}  // namespace detail

inline void render_table2_csv(const std::string& path, const Table2& t) {
  write_grid_csv(path, detail::table2_grid(t));
}

inline void render_table2_md(const std::string& path, const Table2& t) {
  write_grid_md(path, detail::table2_grid(t));
}

namespace detail {

struct RenderRow {
  std::string label;
  bool baseline = false;
  std::string column;  // design column for effect rows
  std::string period;  // period the cell was fitted in
};

// Reporting rows of one factor at one tier: per-period rows for the variant-
// split factor, the registry's term order (baseline in place) otherwise.
inline std::vector<RenderRow> render_rows(const RiskFactor& rf, const StudyConfig& cfg) {
  std::vector<RenderRow> rows;
  if (rf.period_split) {
    for (const std::string& p : cfg.vaccination_periods)
      for (const RiskTerm& t : rf.terms)
        if (!t.baseline()) rows.push_back({t.label + " - " + p, false, t.column, p});
    return rows;
  }
  const std::string period = cfg.periods.empty() ? std::string("Overall") : cfg.periods.front();
  for (const RiskTerm& t : rf.terms)
    rows.push_back({t.label, t.baseline(), t.column, period});
  return rows;
}

inline const FitTerm* find_term(const FitCell& cell, const std::string& column) {
  for (const FitTerm& t : cell.terms)
    if (t.column == column) return &t;
  return nullptr;
}

// One tier's results table: factor heading lines, one row per reported term,
// one column per industry.
inline TextGrid results_grid(const StudyResult& res, AdjustmentTier tier) {
  TextGrid grid;
  std::vector<std::string> header = {"Variable"};
  for (Sector s : res.config.industries) header.push_back(to_string(s));
  grid.push_back(std::move(header));

  bool saw_ineligible = false;
  bool saw_no_fit = false;
  for (const std::string& id : res.config.risk_factor_ids) {
    const RiskFactor& rf = find_risk_factor(id);
    std::vector<std::string> heading(res.config.industries.size() + 1);
    heading[0] = rf.heading;
    grid.push_back(std::move(heading));

    for (const RenderRow& row : render_rows(rf, res.config)) {
      std::vector<std::string> cells = {row.label};
      for (Sector s : res.config.industries) {
        const FitCell* cell = res.cell(rf.id, tier, s, row.period);
        if (cell == nullptr || cell->status == CellStatus::Ineligible) {
          cells.push_back(kNaIneligible);
          saw_ineligible = true;
        } else if (cell->status == CellStatus::Failed) {
          cells.push_back(kNaNoFit);
          saw_no_fit = true;
        } else if (row.baseline) {
          cells.push_back("baseline");
        } else {
          const FitTerm* term = find_term(*cell, row.column);
          if (term == nullptr) {
            cells.push_back(kNaNoFit);
            saw_no_fit = true;
          } else {
            cells.push_back(format_effect_cell(*term));
          }
        }
      }
      grid.push_back(std::move(cells));
    }
  }
  auto footnote = [&grid, &res](const char* text) {
    std::vector<std::string> row(res.config.industries.size() + 1);
    row[0] = text;
    grid.push_back(std::move(row));
  };
  if (saw_ineligible) footnote(kFootnoteIneligible);
  if (saw_no_fit) footnote(kFootnoteNoFit);
  return grid;
}

}  // namespace detail

inline void render_results_csv(const std::string& path, const StudyResult& res,
                               AdjustmentTier tier) {
  write_grid_csv(path, detail::results_grid(res, tier));
}

inline void render_results_md(const std::string& path, const StudyResult& res,
                              AdjustmentTier tier) {
  write_grid_md(path, detail::results_grid(res, tier));
}

// Full coefficient dump for every fitted cell, one row per reported term.
inline void write_fits_csv(const std::string& path, const StudyResult& res) {
  CsvWriter out(path);
  out.row("industry", "risk_factor", "tier", "term", "beta", "se", "ci_lo", "ci_hi", "pct",
          "pct_lo", "pct_hi", "converged", "theta");
  for (const FitCell& cell : res.cells) {
    if (cell.status != CellStatus::Fitted) continue;
    for (const FitTerm& t : cell.terms) {
      out.field(to_string(cell.industry));
      out.field(cell.risk_factor);
      out.field(tier_number(cell.tier));
      out.field(t.label);
      out.field(t.beta);
      out.field(t.se);
      out.field(t.ci_lo);
      out.field(t.ci_hi);
      out.field(t.pct);
      out.field(t.pct_lo);
      out.field(t.pct_hi);
      out.field(cell.fit.converged ? 1 : 0);
      out.field(cell.fit.theta);
      out.end_row();
    }
  }
  out.commit();
}

// Writes the standard result set under `dir`.
struct ReportPaths {
  std::string table2;
  std::string table3;
  std::string table_s1;
  std::string table_s2;
  std::string fits;

  static ReportPaths under(const std::string& dir) {
    return {dir + "/table2.csv", dir + "/table3.csv", dir + "/tableS1.csv",
            dir + "/tableS2.csv", dir + "/fits.csv"};
  }
};

inline void write_report(const ReportPaths& paths, const Table2& t2, const StudyResult& res) {
  render_table2_csv(paths.table2, t2);
  render_results_csv(paths.table3, res, AdjustmentTier::FullyAdjusted);
  render_results_csv(paths.table_s1, res, AdjustmentTier::Unadjusted);
  render_results_csv(paths.table_s2, res, AdjustmentTier::Minimal);
  write_fits_csv(paths.fits, res);
}

}  // namespace crp
