public class ReverseString {
    public static String reverse(String text) {
        StringBuilder builder = new StringBuilder();
        for (int i = text.length() - 1; i >= 0; i--) {
            builder.append(text.charAt(i));
        }
        return builder.toString();
    }

    public static void main(String[] args) {
        System.out.println(reverse(args[0]));
    }
}
