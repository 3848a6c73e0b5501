#include "fxemu/passes.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fxemu/calib.hpp"

namespace fxemu {

std::string PassReport::text() const {
    std::ostringstream os;
    os << "pass " << pass_name << ": removed " << removed.size() << ", added " << added.size()
       << ", modified " << modified.size() << "\n";
    for (const auto& id : removed) os << "  - removed " << id << "\n";
    for (const auto& id : added) os << "  + added " << id << "\n";
    for (const auto& id : modified) os << "  * modified " << id << "\n";
    for (const auto& [t, ch] : fl_changes)
        os << "  ~ " << t << " fl " << ch.first << " -> " << ch.second << "\n";
    for (const auto& w : warnings) os << "  ! " << w << "\n";
    return os.str();
}

namespace {

int count_consumers(const Graph& g, const std::string& tensor) {
    int n = 0;
    for (const Node& node : g.nodes)
        n += static_cast<int>(std::count(node.inputs.begin(), node.inputs.end(), tensor));
    for (const std::string& out : g.outputs)
        if (out == tensor) ++n;
    return n;
}

void erase_node(Graph& g, const std::string& id) {
    g.nodes.erase(std::remove_if(g.nodes.begin(), g.nodes.end(),
                                 [&](const Node& n) { return n.id == id; }),
                  g.nodes.end());
}

void drop_weight_if_unused(Model& m, const std::string& name) {
    if (count_consumers(m.graph, name) > 0) return;
    m.weights.erase(name);
    auto& ws = m.graph.weights;
    ws.erase(std::remove_if(ws.begin(), ws.end(),
                            [&](const TensorInfo& t) { return t.name == name; }),
             ws.end());
}

void add_weight(Model& m, const std::string& name, FTensor t) {
    m.graph.weights.push_back({name, t.shape});
    m.weights[name] = std::move(t);
}

} // namespace

PassReport fuse_conv_bn(Model& m) {
    PassReport rep;
    rep.pass_name = "fuse-conv-bn";

    std::vector<std::string> bn_ids;
    for (const Node& n : m.graph.nodes)
        if (n.kind == NodeKind::BatchNorm2D) bn_ids.push_back(n.id);

    for (const std::string& bn_id : bn_ids) {
        Node* bn = m.graph.find_node(bn_id);
        const Node* producer = m.graph.producer_of(bn->inputs[0]);
        if (!producer || producer->kind != NodeKind::Conv2D) {
            rep.warnings.push_back("BatchNorm2D '" + bn_id + "' does not follow a Conv2D; left intact");
            continue;
        }
        if (count_consumers(m.graph, producer->output) != 1) {
            rep.warnings.push_back("BatchNorm2D '" + bn_id + "': conv output '" + producer->output +
                                   "' has other consumers; left intact");
            continue;
        }

        Node* conv = m.graph.find_node(producer->id);
        const FTensor& gamma = m.weight(bn->inputs[1]);
        const FTensor& beta = m.weight(bn->inputs[2]);
        const FTensor& mean = m.weight(bn->inputs[3]);
        const FTensor& var = m.weight(bn->inputs[4]);
        const double eps = bn->attrs.eps;

        const std::string wname = conv->inputs[1];
        const FTensor w = m.weight(wname);
        const int64_t oc = w.shape[0];
        const int64_t per_channel = w.numel() / oc;
        const bool had_bias = conv->inputs.size() == 3;
        const FTensor b = had_bias ? m.weight(conv->inputs[2]) : FTensor::zeros({oc});

        FTensor w2 = w;
        FTensor b2 = FTensor::zeros({oc});
        for (int64_t c = 0; c < oc; ++c) {
            const double s = static_cast<double>(gamma.data[c]) /
                             std::sqrt(static_cast<double>(var.data[c]) + eps);
            for (int64_t i = 0; i < per_channel; ++i)
                w2.data[c * per_channel + i] = static_cast<float>(double(w.data[c * per_channel + i]) * s);
            b2.data[c] = static_cast<float>((double(b.data[c]) - double(mean.data[c])) * s +
                                            double(beta.data[c]));
        }

        // A shared weight tensor must not be rewritten in place.
        const bool w_shared = count_consumers(m.graph, wname) > 1;
        const std::string new_wname = w_shared ? conv->id + ".w_fused" : wname;
        if (w_shared) {
            add_weight(m, new_wname, std::move(w2));
            conv->inputs[1] = new_wname;
        } else {
            m.weights[wname] = std::move(w2);
        }

        std::string bname = had_bias ? conv->inputs[2] : conv->id + ".b";
        if (had_bias && count_consumers(m.graph, bname) > 1) bname = conv->id + ".b_fused";
        if (m.weights.count(bname)) {
            m.weights[bname] = std::move(b2);
        } else {
            add_weight(m, bname, std::move(b2));
        }
        if (conv->inputs.size() == 3)
            conv->inputs[2] = bname;
        else
            conv->inputs.push_back(bname);

        // The conv now produces the BN's output directly.
        const std::vector<std::string> bn_params(bn->inputs.begin() + 1, bn->inputs.end());
        const std::string conv_id = conv->id;
        conv->output = bn->output;
        erase_node(m.graph, bn_id); // invalidates conv/bn pointers
        for (const std::string& p : bn_params) drop_weight_if_unused(m, p);

        rep.removed.push_back(bn_id);
        rep.modified.push_back(conv_id);
    }
    return rep;
}

PassReport distribute_bn_over_concat(Model& m) {
    PassReport rep;
    rep.pass_name = "distribute-bn-over-concat";

    std::vector<std::string> bn_ids;
    for (const Node& n : m.graph.nodes)
        if (n.kind == NodeKind::BatchNorm2D) bn_ids.push_back(n.id);

    auto shapes = infer_shapes(m.graph);

    for (const std::string& bn_id : bn_ids) {
        Node* bn = m.graph.find_node(bn_id);
        const Node* concat = m.graph.producer_of(bn->inputs[0]);
        if (!concat || concat->kind != NodeKind::Concat) continue;
        if (concat->attrs.axis != 1) {
            rep.warnings.push_back("BatchNorm2D '" + bn_id +
                                   "' follows a non-channel Concat; cannot distribute");
            continue;
        }

        const FTensor& gamma = m.weight(bn->inputs[1]);
        const std::vector<std::string> branches = Graph::data_inputs(*concat);
        int64_t total = 0;
        std::vector<int64_t> widths;
        for (const std::string& br : branches) {
            const int64_t c = shapes.at(br).at(1);
            widths.push_back(c);
            total += c;
        }
        if (total != gamma.numel())
            throw GraphError("BatchNorm2D '" + bn_id + "': branch channels sum to " +
                             std::to_string(total) + " but BN has " + std::to_string(gamma.numel()));

        const std::vector<std::string> bn_params(bn->inputs.begin() + 1, bn->inputs.end());
        static const char* suffix[4] = {".gamma", ".beta", ".mean", ".var"};

        std::vector<std::string> branch_outputs;
        int64_t offset = 0;
        std::vector<Node> new_nodes;
        for (size_t i = 0; i < branches.size(); ++i) {
            Node piece;
            piece.id = bn_id + ".b" + std::to_string(i);
            piece.kind = NodeKind::BatchNorm2D;
            piece.attrs.eps = bn->attrs.eps;
            piece.output = piece.id + ".out";
            piece.inputs.push_back(branches[i]);
            for (int p = 0; p < 4; ++p) {
                const FTensor& full = m.weight(bn_params[p]);
                FTensor slice = FTensor::zeros({widths[i]});
                std::copy(full.data.begin() + offset, full.data.begin() + offset + widths[i],
                          slice.data.begin());
                const std::string pname = piece.id + suffix[p];
                add_weight(m, pname, std::move(slice));
                piece.inputs.push_back(pname);
            }
            branch_outputs.push_back(piece.output);
            new_nodes.push_back(std::move(piece));
            offset += widths[i];
            rep.added.push_back(new_nodes.back().id);
        }

        // Rebuild the join: a concat of normalized branches now produces the
        // BN's output. The raw concat survives only if someone else reads it.
        Node new_concat;
        new_concat.kind = NodeKind::Concat;
        new_concat.attrs.axis = 1;
        new_concat.inputs = branch_outputs;
        new_concat.output = bn->output;

        const bool concat_shared = count_consumers(m.graph, concat->output) > 1;
        const std::string concat_id = concat->id;
        if (concat_shared) {
            new_concat.id = bn_id + ".concat";
            rep.added.push_back(new_concat.id);
        } else {
            new_concat.id = concat_id;
            erase_node(m.graph, concat_id);
            rep.modified.push_back(concat_id);
        }

        erase_node(m.graph, bn_id);
        rep.removed.push_back(bn_id);

        // Insert the branch BNs before the join, keeping node order topological.
        for (Node& piece : new_nodes) m.graph.nodes.push_back(std::move(piece));
        m.graph.nodes.push_back(std::move(new_concat));

        for (const std::string& p : bn_params) drop_weight_if_unused(m, p);
    }
    return rep;
}

PassReport eliminate_division(Model& m, QuantAnnotation& ann, const WlConfig& cfg) {
    PassReport rep;
    rep.pass_name = "eliminate-division";

    auto shapes = infer_shapes(m.graph);

    std::vector<std::string> ids;
    for (const Node& n : m.graph.nodes) ids.push_back(n.id);

    for (const std::string& id : ids) {
        Node* n = m.graph.find_node(id);
        switch (n->kind) {
            case NodeKind::BatchNorm2D:
                throw PipelineError("BatchNorm2D '" + id +
                                    "' survived fusion and divides by sqrt(var+eps); "
                                    "the graph cannot be emulated without division");
            case NodeKind::GlobalAvgPool: {
                const auto& xshape = shapes.at(n->inputs[0]);
                const int64_t area = xshape[2] * xshape[3];
                const double recip = 1.0 / static_cast<double>(area);
                const QuantConst c{quantize_raw(recip, internal_const_params(recip, cfg)),
                                   internal_const_params(recip, cfg)};

                Node sum;
                sum.id = id + ".sum";
                sum.kind = NodeKind::SpatialSum;
                sum.inputs = {n->inputs[0]};
                sum.output = n->output + ".sum";
                // The exact spatial sum needs log2(area) extra bits at the
                // input's FL.
                const QuantParams xp = ann.params_of(n->inputs[0]);
                int extra = 0;
                while ((int64_t(1) << extra) < area) ++extra;
                const int sum_wl = std::min(xp.wl + extra, 63);
                ann.tensor_params[sum.output] = QuantParams{sum_wl, xp.fl};

                n->kind = NodeKind::Mul;
                n->inputs = {sum.output};
                n->attrs = Attrs{};
                n->attrs.value = c.value();
                n->attrs.qconst = c;

                // Keep node order topological: the sum goes right before its consumer.
                auto pos = std::find_if(m.graph.nodes.begin(), m.graph.nodes.end(),
                                        [&](const Node& g) { return g.id == id; });
                m.graph.nodes.insert(pos, std::move(sum));
                ann.division_free[id] = true;
                ann.division_free[id + ".sum"] = true;
                rep.added.push_back(id + ".sum");
                rep.modified.push_back(id);
                break;
            }
            case NodeKind::HardSwish: {
                const QuantParams cp = QuantParams::checked(cfg.internal_wl(), cfg.internal_wl() - 1);
                n->attrs.qconst = QuantConst{quantize_raw(1.0 / 6.0, cp), cp};
                ann.division_free[id] = true;
                rep.modified.push_back(id);
                break;
            }
            case NodeKind::LeakyReLU: {
                const double slope = n->attrs.negative_slope;
                const QuantParams sp = internal_const_params(slope, cfg);
                const QuantConst c{quantize_raw(slope, sp), sp};
                n->attrs.qconst = c;
                n->attrs.negative_slope = c.value(); // quantized slope is the semantic slope now
                ann.division_free[id] = true;
                rep.modified.push_back(id);
                break;
            }
            case NodeKind::Mul: {
                if (!n->attrs.qconst) {
                    const QuantParams cp = internal_const_params(n->attrs.value, cfg);
                    n->attrs.qconst = QuantConst{quantize_raw(n->attrs.value, cp), cp};
                    n->attrs.value = n->attrs.qconst->value();
                    rep.modified.push_back(id);
                }
                ann.division_free[id] = true;
                break;
            }
            default:
                break;
        }
    }

    for (const auto& [id, free] : ann.division_free)
        if (!free && m.graph.find_node(id))
            throw PipelineError("node '" + id + "' is not division-free after rewriting");
    return rep;
}

PassReport adjust_fl(const Graph& g, QuantAnnotation& ann, AddStrategy strategy) {
    PassReport rep;
    rep.pass_name = "adjust-fl";
    ann.add_strategy = strategy;

    const auto joins = find_join_points(g);
    std::map<std::string, int> original_fl;
    auto set_fl = [&](const std::string& tensor, int fl) {
        QuantParams& p = ann.tensor_params.at(tensor);
        if (p.fl == fl) return false;
        if (!original_fl.count(tensor)) original_fl[tensor] = p.fl;
        p.fl = fl;
        rep.fl_changes[tensor] = {original_fl[tensor], fl};
        return true;
    };

    // Minimum rule, iterated to a fixed point (a producer can feed several
    // joins; FLs only ever decrease, so this terminates).
    bool changed = true;
    while (changed) {
        changed = false;
        for (const JoinPoint& jp : joins) {
            if (jp.producers.empty())
                throw GraphError("join '" + jp.node_id + "' has no producers");
            if (jp.kind == NodeKind::Add && strategy == AddStrategy::AlignMax)
                continue; // the executor aligns upward; nothing to rewrite
            int mn = ann.params_of(jp.producers[0].tensor).fl;
            int wl0 = ann.params_of(jp.producers[0].tensor).wl;
            for (const JoinProducer& p : jp.producers) {
                mn = std::min(mn, ann.params_of(p.tensor).fl);
                if (ann.params_of(p.tensor).wl != wl0)
                    rep.warnings.push_back("join '" + jp.node_id +
                                           "' mixes word lengths; inputs will not share one format");
            }
            for (const JoinProducer& p : jp.producers)
                if (set_fl(p.tensor, mn)) {
                    changed = true;
                    if (std::find(rep.modified.begin(), rep.modified.end(), jp.node_id) ==
                        rep.modified.end())
                        rep.modified.push_back(jp.node_id);
                }
        }
    }

    // Re-propagate formats through nodes that carry their input format.
    for (const Node* n : topo_order(g)) {
        if (is_fl_transparent(n->kind)) {
            const QuantParams in = ann.params_of(Graph::data_inputs(*n).front());
            if (ann.tensor_params.at(n->output) != in) {
                set_fl(n->output, in.fl);
                ann.tensor_params.at(n->output).wl = in.wl;
            }
        } else if (n->kind == NodeKind::Concat) {
            const QuantParams in = ann.params_of(Graph::data_inputs(*n).front());
            if (ann.tensor_params.count(n->output) && ann.tensor_params.at(n->output) != in) {
                set_fl(n->output, in.fl);
                ann.tensor_params.at(n->output).wl = in.wl;
            }
        } else if (n->kind == NodeKind::SpatialSum) {
            // The exact sum sits at its input's FL; its widened WL stays.
            const QuantParams in = ann.params_of(Graph::data_inputs(*n).front());
            set_fl(n->output, in.fl);
        }
    }
    return rep;
}

} // namespace fxemu
