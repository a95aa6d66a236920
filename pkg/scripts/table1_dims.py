"""Print compressed-column counts and input dimensions for the built-in schemas."""

from clbf.codec import identity_plan, input_dimension, plan_compression
from clbf.datagen import AIRPLANE, DMV

THETAS = {"airplane": (AIRPLANE, [3000, 5500, 8000]), "dmv": (DMV, [100, 1000, 2000])}


def main():
    for name, (schema, thetas) in THETAS.items():
        print(f"{name}: LMBF input dim {input_dimension(identity_plan(schema))}")
        for theta in thetas:
            plan = plan_compression(schema, theta, 2)
            print(f"  theta={theta:>5}  compressed={plan.n_split:>2}  "
                  f"dim={input_dimension(plan):>6}  "
                  f"dim(2*d-1 per split)={input_dimension(plan, paper_convention=True):>6}")


if __name__ == "__main__":
    main()
