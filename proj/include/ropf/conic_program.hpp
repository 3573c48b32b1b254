#pragma once

// Standard-form conic program with named rows and columns.
//
// A program is
//     minimize    c'x + c0
//     subject to  b - Ax in K
// where K is an ordered product of zero cones (equality rows), a
// nonnegative cone (inequality rows, Ax <= b) and second-order cones
// (first row of a segment is the cone scalar: ||B x + a|| <= e'x + f is
// stored as rows [-e'; -B] with right-hand side [f; a]).
//
// Row labels carry constraint provenance so subproblem duals can be
// pulled out by name; column labels do the same for the primal point.

#include <cstdint>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ropf {

enum class ConeKind { Zero, NonNeg, Soc };

struct ConeSeg {
    ConeKind kind;
    int dim;
};

struct Coef {
    int col;
    double value;
};

class ConicProgram {
  public:
    int num_cols() const { return static_cast<int>(col_labels_.size()); }
    int num_rows() const { return static_cast<int>(b_.size()); }

    int add_col(const std::string& label, double obj_coef = 0.0) {
        col_labels_.push_back(label);
        obj_.push_back(obj_coef);
        return static_cast<int>(col_labels_.size()) - 1;
    }

    void set_obj(int col, double coef) { obj_[col] = coef; }
    void add_obj(int col, double coef) { obj_[col] += coef; }
    void set_obj_offset(double off) { obj_offset_ = off; }
    void add_obj_offset(double off) { obj_offset_ += off; }
    double obj_offset() const { return obj_offset_; }
    double obj_coef(int col) const { return obj_[col]; }

    // Equality row: sum coefs = rhs.
    int add_eq(const std::string& label, const std::vector<Coef>& coefs, double rhs) {
        return add_row(ConeKind::Zero, label, coefs, rhs);
    }
    // Inequality row: sum coefs <= rhs.
    int add_le(const std::string& label, const std::vector<Coef>& coefs, double rhs) {
        return add_row(ConeKind::NonNeg, label, coefs, rhs);
    }
    // ||B x + a|| <= e'x + f.  rows[0] is (e, f), the rest are (B_i, a_i).
    int add_soc(const std::string& label,
                const std::vector<std::pair<std::vector<Coef>, double>>& rows) {
        if (rows.size() < 2) throw std::runtime_error("SOC needs dimension >= 2: " + label);
        int first = num_rows();
        {
            std::vector<Coef> neg = rows[0].first;
            for (Coef& c : neg) c.value = -c.value;
            push_raw_row(label, neg, rows[0].second);
        }
        for (size_t i = 1; i < rows.size(); ++i) {
            std::vector<Coef> neg = rows[i].first;
            for (Coef& c : neg) c.value = -c.value;
            push_raw_row(label + "#" + std::to_string(i), neg, rows[i].second);
        }
        cones_.push_back({ConeKind::Soc, static_cast<int>(rows.size())});
        return first;
    }

    const std::vector<ConeSeg>& cones() const { return cones_; }
    const std::vector<double>& rhs() const { return b_; }
    const std::vector<double>& obj() const { return obj_; }
    const std::vector<std::vector<Coef>>& rows() const { return rows_; }
    const std::vector<std::string>& row_labels() const { return row_labels_; }
    const std::vector<std::string>& col_labels() const { return col_labels_; }

    int row_by_label(const std::string& label) const {
        auto it = row_lookup_.find(label);
        if (it == row_lookup_.end()) throw std::runtime_error("unknown row label: " + label);
        return it->second;
    }
    bool has_row(const std::string& label) const { return row_lookup_.count(label) > 0; }
    int col_by_label(const std::string& label) const {
        for (size_t i = 0; i < col_labels_.size(); ++i)
            if (col_labels_[i] == label) return static_cast<int>(i);
        throw std::runtime_error("unknown column label: " + label);
    }

    double eval_obj(const std::vector<double>& x) const {
        double v = obj_offset_;
        for (int j = 0; j < num_cols(); ++j) v += obj_[j] * x[j];
        return v;
    }

    // Row activity a_i'x.
    double row_activity(int row, const std::vector<double>& x) const {
        double v = 0.0;
        for (const Coef& c : rows_[row]) v += c.value * x[c.col];
        return v;
    }

    // Worst constraint violation of a point: equality mismatch, negative
    // inequality slack, or second-order cone deficit. Nonpositive values
    // mean feasible.
    double max_violation(const std::vector<double>& x) const {
        double worst = -std::numeric_limits<double>::infinity();
        int r = 0;
        for (const ConeSeg& seg : cones_) {
            if (seg.kind == ConeKind::Zero) {
                for (int i = 0; i < seg.dim; ++i, ++r)
                    worst = std::max(worst, std::abs(b_[r] - row_activity(r, x)));
            } else if (seg.kind == ConeKind::NonNeg) {
                for (int i = 0; i < seg.dim; ++i, ++r)
                    worst = std::max(worst, row_activity(r, x) - b_[r]);
            } else {
                double head = b_[r] - row_activity(r, x);
                double tail2 = 0.0;
                for (int i = 1; i < seg.dim; ++i) {
                    double v = b_[r + i] - row_activity(r + i, x);
                    tail2 += v * v;
                }
                worst = std::max(worst, std::sqrt(tail2) - head);
                r += seg.dim;
            }
        }
        return worst;
    }

    // Violation of one labeled row family, for diagnostics.
    double row_slack(int row, const std::vector<double>& x) const {
        return b_[row] - row_activity(row, x);
    }

    // Validates cone segment dimensions against the row count and checks
    // column indices. Throws on structural inconsistency.
    void check() const {
        int total = 0;
        for (const ConeSeg& seg : cones_) {
            if (seg.kind == ConeKind::Soc && seg.dim < 2)
                throw std::runtime_error("SOC with dimension < 2");
            total += seg.dim;
        }
        if (total != num_rows()) throw std::runtime_error("cone dims do not sum to row count");
        for (const auto& row : rows_)
            for (const Coef& c : row)
                if (c.col < 0 || c.col >= num_cols())
                    throw std::runtime_error("column index out of range");
    }

    // Sparse text format: header, objective, rows with cone tags, labels.
    std::string to_text() const {
        std::ostringstream out;
        out.precision(17);
        out << "conicprogram 1\n";
        out << "cols " << num_cols() << "\n";
        out << "rows " << num_rows() << "\n";
        out << "offset " << obj_offset_ << "\n";
        for (int j = 0; j < num_cols(); ++j)
            out << "col " << j << " " << obj_[j] << " " << col_labels_[j] << "\n";
        int r = 0;
        for (const ConeSeg& seg : cones_) {
            const char* tag = seg.kind == ConeKind::Zero     ? "zero"
                              : seg.kind == ConeKind::NonNeg ? "nonneg"
                                                             : "soc";
            out << "cone " << tag << " " << seg.dim << "\n";
            for (int i = 0; i < seg.dim; ++i, ++r) {
                out << "row " << b_[r] << " " << rows_[r].size();
                for (const Coef& c : rows_[r]) out << " " << c.col << " " << c.value;
                out << " " << row_labels_[r] << "\n";
            }
        }
        return out.str();
    }

    static ConicProgram from_text(const std::string& text) {
        std::istringstream in(text);
        std::string tok;
        int version = 0;
        in >> tok >> version;
        if (tok != "conicprogram") throw std::runtime_error("bad program header");
        int ncols = 0, nrows = 0;
        ConicProgram p;
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            std::istringstream ls(line);
            ls >> tok;
            if (tok == "cols") ls >> ncols;
            else if (tok == "rows") ls >> nrows;
            else if (tok == "offset") ls >> p.obj_offset_;
            else if (tok == "col") {
                int j; double cj; std::string label;
                ls >> j >> cj;
                std::getline(ls, label);
                p.add_col(trim(label), cj);
            } else if (tok == "cone") {
                std::string kind; int dim;
                ls >> kind >> dim;
                p.cones_.push_back({kind == "zero"     ? ConeKind::Zero
                                    : kind == "nonneg" ? ConeKind::NonNeg
                                                       : ConeKind::Soc,
                                    dim});
            } else if (tok == "row") {
                double rhs; int nnz;
                ls >> rhs >> nnz;
                std::vector<Coef> coefs(nnz);
                for (int i = 0; i < nnz; ++i) ls >> coefs[i].col >> coefs[i].value;
                std::string label;
                std::getline(ls, label);
                p.push_raw_row(trim(label), coefs, rhs);
            }
        }
        if (p.num_cols() != ncols || p.num_rows() != nrows)
            throw std::runtime_error("program text dims inconsistent");
        p.check();
        return p;
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write " + path);
        f << to_text();
    }

    static ConicProgram load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot read " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return from_text(ss.str());
    }

  private:
    static std::string trim(const std::string& s) {
        auto a = s.find_first_not_of(" \t");
        auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? "" : s.substr(a, b - a + 1);
    }

    int add_row(ConeKind kind, const std::string& label, const std::vector<Coef>& coefs,
                double rhs) {
        int idx = push_raw_row(label, coefs, rhs);
        // Adjacent scalar segments of the same kind are merged.
        if (!cones_.empty() && cones_.back().kind == kind && kind != ConeKind::Soc)
            ++cones_.back().dim;
        else
            cones_.push_back({kind, 1});
        return idx;
    }

    int push_raw_row(const std::string& label, const std::vector<Coef>& coefs, double rhs) {
        rows_.push_back(coefs);
        b_.push_back(rhs);
        row_labels_.push_back(label);
        row_lookup_[label] = static_cast<int>(b_.size()) - 1;
        return static_cast<int>(b_.size()) - 1;
    }

    std::vector<double> obj_;
    double obj_offset_ = 0.0;
    std::vector<std::vector<Coef>> rows_;
    std::vector<double> b_;
    std::vector<ConeSeg> cones_;
    std::vector<std::string> row_labels_;
    std::vector<std::string> col_labels_;
    std::map<std::string, int> row_lookup_;
};

}  // namespace ropf
