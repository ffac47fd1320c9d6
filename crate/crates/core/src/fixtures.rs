//! A worked reference connection with known closed-form invariants.
//!
//! The connection is metrisable; its Weyl tensor, pencil, normal-form pair,
//! `φ`, `ψ`, scale and metric are all known in closed form and are used as
//! golden values throughout the test suites.

use crate::expr::Expr;
use crate::projective::ConnectionSpec;

fn e(s: &str) -> Expr {
    Expr::parse(s).expect("fixture expression parses")
}

fn sym6(m: [&str; 6]) -> [Expr; 6] {
    m.map(e)
}

/// `Γ_{ab}{}^c` as strings indexed `[a][b][c]`.
pub const EXAMPLE_GAMMA: [[[&str; 3]; 3]; 3] = [
    [
        ["(y + 4*x*z + 5*x^2*y)/((x*y + z)*(1 + x^2))", "-(x*y + z)*x*z^2", "-(x*y + z)*(x*y + 2*z)*z"],
        ["x/(x*y + z)", "2*x/(1 + x^2)", "0"],
        ["(x*y + 2*z)/((x*y + z)*z)", "0", "2*x/(1 + x^2)"],
    ],
    [
        ["x/(x*y + z)", "2*x/(1 + x^2)", "0"],
        ["0", "0", "0"],
        ["0", "0", "0"],
    ],
    [
        ["(x*y + 2*z)/((x*y + z)*z)", "0", "2*x/(1 + x^2)"],
        ["0", "0", "0"],
        ["0", "0", "0"],
    ],
];

pub const EXAMPLE_EPSILON: &str = "(1 + x^2)^4*(x*y + z)*z";

pub fn example_connection() -> ConnectionSpec {
    ConnectionSpec::parse(&EXAMPLE_GAMMA, Some(EXAMPLE_EPSILON)).expect("fixture connection is valid")
}

/// Closed-form `V^{ab}{}_c` indexed `[c][slot(a,b)]`.
pub fn printed_weyl() -> [[Expr; 6]; 3] {
    let q = "((x*y + z)^2*(1 + x^2)^4*z^2)";
    [
        sym6([
            "0",
            "0",
            "0",
            "-2*x/(1 + x^2)^4",
            "-2/(1 + x^2)^4",
            "2*x/(1 + x^2)^4",
        ]),
        [
            e("0"),
            e(&format!("x/{q}")),
            e("0"),
            e("0"),
            e("0"),
            e("0"),
        ],
        [
            e("0"),
            e(&format!("2/{q}")),
            e(&format!("-x/{q}")),
            e("0"),
            e("0"),
            e("0"),
        ],
    ]
}

/// The pair `(ρ, σ)` with `V = ρ ∧ σ`, storage order `11, 12, 13, 22, 23, 33`.
pub fn printed_pencil() -> ([Expr; 6], [Expr; 6]) {
    let pre = "((x*y + z)^3*(1 + x^2)^4*z^3)";
    let rho = [
        e(&format!("4/((x*y + z)^2*z^2)/{pre}")),
        e("0"),
        e("0"),
        e("0"),
        e(&format!("2*x/{pre}")),
        e(&format!("4/{pre}")),
    ];
    let sigma = sym6([
        "1/(1 + x^2)^4",
        "0",
        "0",
        "(x*y + z)^2*z^2/(1 + x^2)^4",
        "0",
        "(x*y + z)^2*z^2/(1 + x^2)^4",
    ]);
    (rho, sigma)
}

/// The normal-form pair `(ρ̃, σ̃)` and `ξ = (1, 0, 0)`.
pub fn printed_normal_form() -> ([Expr; 6], [Expr; 6], [Expr; 3]) {
    let rho = sym6(["0", "0", "0", "2/(1 + x^2)^4", "-x/(1 + x^2)^4", "0"]);
    let sigma = sym6([
        "2*x^2/(1 + x^2)^4",
        "0",
        "0",
        "2*(2 + x^2)*(x*y + z)^2*z^2/(1 + x^2)^4",
        "-2*x*(x*y + z)^2*z^2/(1 + x^2)^4",
        "2*x^2*(x*y + z)^2*z^2/(1 + x^2)^4",
    ]);
    (rho, sigma, ["1", "0", "0"].map(e))
}

pub const PRINTED_PHI: &str = "-4*x^3/((1 + x^2)^9*(x*y + z)^2*z^2)";
pub const PRINTED_PSI: &str = "-8*x^3/(1 + x^2)^9";

/// Potential whose gradient is the scale one-form `ω`.
pub const PRINTED_OMEGA_POTENTIAL: &str = "5*log(x*(x*y + z)*z/(1 + x^2))";

pub const PRINTED_H: &str = "((1 + x^2)/(x*(x*y + z)*z))^2";

/// The solution `σ^{ab}` of the metrisability equation.
pub fn printed_solution() -> [Expr; 6] {
    sym6([
        "1/((x*y + z)^2*z^2)/(1 + x^2)^2",
        "0",
        "0",
        "1/(1 + x^2)^2",
        "0",
        "1/(1 + x^2)^2",
    ])
}

/// The metric `g_{ab}`, up to an overall constant.
pub fn printed_metric() -> [Expr; 6] {
    sym6(["(x*y + z)^2*z^2/6", "0", "0", "1/6", "0", "1/6"])
}
