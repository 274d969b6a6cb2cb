"""Where the rate picture stops working.

Increases the donor-acceptor coupling past the combined reorganization
energy and reports how well a single exponential still describes the
acceptor population.
"""

from supertransfer import check_rules, simulate, table1_spec


def main():
    print("V_DA   rule-1 ratio   R2        oscillation   valid")
    for v in (5.0, 10.0, 20.0, 30.0, 60.0, 90.0):
        spec = table1_spec(cross_coupling=v)
        res = simulate(spec, {"kind": "mixture"}, horizon=2.0 if v >= 60 else "auto")
        fit = res.fit
        print(f"{v:4.0f}   {check_rules(spec).rule1_ratio:12.3f}   {fit.r_squared:.5f}   "
              f"{str(fit.oscillation):>11}   {fit.exponential_valid}")


if __name__ == "__main__":
    main()
