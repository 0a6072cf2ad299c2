"""Mean curvature flow of Killing graphs in warped products."""
