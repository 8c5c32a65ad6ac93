import unittest
import numpy as np
from .. import graph, propagation


def random_graph(rng: np.random.Generator, num_nodes: int, num_edges: int) -> graph.NormalizedGraph:
    pairs = rng.integers(0, num_nodes, size=(num_edges, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return graph.symmetric_normalize(graph.build_csr(pairs, num_nodes))


class TestPropagation(unittest.TestCase):
    """Tests the residual propagation and its adjoint"""

    def test_dense_oracle(self):
        # Compares the sparse propagation with the dense operator on random graphs
        rng = np.random.default_rng(11)
        for _ in range(100):
            num_nodes = int(rng.integers(2, 30))
            g = random_graph(rng, num_nodes, int(rng.integers(0, 3 * num_nodes)))
            plan = propagation.PropagationPlan(g, float(rng.uniform(0.0, 1.0)), int(rng.integers(1, 5)))
            h0 = rng.normal(size=(num_nodes, 3))
            output, cache = propagation.grec_forward(plan, h0)
            self.assertEqual(cache.depth, plan.layers)
            self.assertTrue(np.allclose(output, propagation.dense_operator(plan) @ h0, rtol=0.0, atol=1e-10))

            output32, _ = propagation.grec_forward(plan, h0.astype(np.float32))
            self.assertEqual(output32.dtype, np.float32)
            self.assertTrue(np.allclose(output32, output, rtol=0.0, atol=1e-5))

    def test_identity(self):
        # Checks that alpha = 1 leaves the input bitwise unchanged
        rng = np.random.default_rng(3)
        plan = propagation.PropagationPlan(random_graph(rng, 10, 20), 1.0, 3)
        h0 = rng.normal(size=(10, 4))
        output, cache = propagation.grec_forward(plan, h0)
        self.assertTrue(np.array_equal(output, h0))
        self.assertIsNot(output, h0)
        self.assertTrue(np.array_equal(propagation.grec_backward(plan, cache, h0), h0))

    def test_isolated_nodes(self):
        # Checks that isolated nodes only keep the residual share
        g = graph.symmetric_normalize(graph.build_csr([(0, 1)], 3))
        plan = propagation.PropagationPlan(g, 0.5, 2)
        output, _ = propagation.grec_forward(plan, np.array([[1.0], [1.0], [1.0]]))
        self.assertEqual(output[:, 0].tolist(), [1.0, 1.0, 0.25])

    def test_adjoint(self):
        # Checks <P x, y> = <x, P^T y> and linearity on random graphs
        rng = np.random.default_rng(5)
        for _ in range(20):
            plan = propagation.PropagationPlan(random_graph(rng, 15, 30), 0.3, 3)
            x = rng.normal(size=(15, 2))
            y = rng.normal(size=(15, 2))
            forward, cache = propagation.grec_forward(plan, x)
            backward = propagation.grec_backward(plan, cache, y)
            self.assertAlmostEqual(float(np.sum(forward * y)), float(np.sum(x * backward)), places=10)

            combined, _ = propagation.grec_forward(plan, 2.0 * x - 3.0 * y)
            separate = 2.0 * forward - 3.0 * propagation.grec_forward(plan, y)[0]
            self.assertTrue(np.allclose(combined, separate, rtol=0.0, atol=1e-10))

    def test_errors(self):
        # Checks invalid plans and shape mismatches
        rng = np.random.default_rng(1)
        g = random_graph(rng, 5, 6)
        with self.assertRaises(propagation.PropagationError):
            propagation.PropagationPlan(graph.build_csr([(0, 1)], 2))
        with self.assertRaises(propagation.PropagationError):
            propagation.PropagationPlan(g, 1.5, 2)
        with self.assertRaises(propagation.PropagationError):
            propagation.PropagationPlan(g, 0.5, 0)

        plan = propagation.PropagationPlan(g, 0.5, 2)
        with self.assertRaises(propagation.PropagationError):
            propagation.grec_forward(plan, np.zeros((4, 2)))
        with self.assertRaises(propagation.PropagationError):
            propagation.grec_forward(plan, np.zeros(5))
        _, cache = propagation.grec_forward(plan, np.zeros((5, 2)))
        with self.assertRaises(propagation.PropagationError):
            propagation.grec_backward(plan, cache, np.zeros((5, 3)))
        other = propagation.PropagationPlan(g, 0.5, 2)
        with self.assertRaises(propagation.PropagationError):
            propagation.grec_backward(other, cache, np.zeros((5, 2)))


class TestHierarchicalPropagation(unittest.TestCase):
    """Tests the pre-training and fine-tuning propagation over several graphs"""

    def setUp(self):
        rng = np.random.default_rng(9)
        self.rng = rng
        self.first = propagation.PropagationPlan(random_graph(rng, 4, 5), 0.5, 2)
        self.second = propagation.PropagationPlan(random_graph(rng, 6, 8), 0.5, 2)
        self.global_plan = propagation.PropagationPlan(random_graph(rng, 10, 20), 0.5, 2)

    def test_pretrain_blocks(self):
        # Checks that the local table propagates per domain and the global table on the global graph
        domain_plans = [(0, self.first), (4, self.second)]
        local = self.rng.normal(size=(10, 3))
        global_table = self.rng.normal(size=(10, 3))
        local_out, global_out, caches = propagation.hierarchical_pretrain_forward(domain_plans, self.global_plan,
                                                                                 local, global_table)
        self.assertTrue(np.allclose(local_out[:4], propagation.dense_operator(self.first) @ local[:4], atol=1e-12))
        self.assertTrue(np.allclose(local_out[4:], propagation.dense_operator(self.second) @ local[4:], atol=1e-12))
        self.assertTrue(np.allclose(global_out, propagation.dense_operator(self.global_plan) @ global_table,
                                    atol=1e-12))

        grad_local, grad_global = propagation.hierarchical_pretrain_backward(domain_plans, self.global_plan, caches,
                                                                             local, global_table)
        self.assertTrue(np.allclose(grad_local, local_out, atol=1e-12))
        self.assertTrue(np.allclose(grad_global, global_out, atol=1e-12))

        wrapper = propagation.PretrainPropagation(domain_plans, self.global_plan)
        self.assertEqual(wrapper.num_nodes, 10)
        self.assertTrue(np.array_equal(wrapper.forward(local, global_table)[0], local_out))

    def test_pretrain_tiling(self):
        # Checks that the domain subgraphs have to cover the global graph exactly
        local = np.zeros((10, 2))
        with self.assertRaises(propagation.PropagationError) as context:
            propagation.hierarchical_pretrain_forward([(0, self.first)], self.global_plan, local, local)
        self.assertIn("missing", str(context.exception))
        with self.assertRaises(propagation.PropagationError):
            propagation.PretrainPropagation([(0, self.first), (5, self.second)], self.global_plan)

    def test_finetune(self):
        # Checks the fine-tuning propagation on two graphs of equal size
        cross = propagation.PropagationPlan(random_graph(self.rng, 10, 15), 0.5, 2)
        wrapper = propagation.FinetunePropagation(cross, self.global_plan)
        local = self.rng.normal(size=(10, 2))
        global_table = self.rng.normal(size=(10, 2))
        local_out, global_out, caches = wrapper.forward(local, global_table)
        self.assertTrue(np.allclose(local_out, propagation.dense_operator(cross) @ local, atol=1e-12))
        self.assertTrue(np.allclose(global_out, propagation.dense_operator(self.global_plan) @ global_table,
                                    atol=1e-12))
        grads = wrapper.backward(caches, local, global_table)
        self.assertTrue(np.allclose(grads[0], local_out, atol=1e-12))
        with self.assertRaises(propagation.PropagationError):
            propagation.FinetunePropagation(self.first, self.global_plan)
        with self.assertRaises(propagation.PropagationError):
            wrapper.forward(local[:5], global_table)


if __name__ == '__main__':
    unittest.main(verbosity=2)
