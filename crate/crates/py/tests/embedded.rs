use pyo3::prelude::*;

use gcdlab_py::gcdlab_module;

#[test]
fn module_runs_under_embedded_python() {
    pyo3::append_to_inittab!(gcdlab_module);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            cr#"
import gcdlab_py as g
from fractions import Fraction

a = g.IntegerSet.multiples(20, 5)
inst = g.GcdInstance([a, a, a], 10)
fast = inst.census()
assert fast == inst.census(brute=True), fast
assert fast["delta"] == Fraction(fast["qualifying"], fast["total"])
try:
    inst.census(brute=True, cap=3)
except g.CapExceededError:
    pass
else:
    raise AssertionError("cap not enforced")
lcm = g.LcmInstance([a, a], 100)
assert lcm.census() == lcm.census(brute=True)
"#,
            None,
            None,
        )
        .unwrap();
    });
}
